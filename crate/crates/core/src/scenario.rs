//! Scenario files: everything needed to reproduce a simulated run.
//!
//! The format is flat `key = value` lines. `#` starts a comment, blank lines
//! are ignored, keys may appear at most once and unknown keys are rejected.
//!
//! | key                     | default              | meaning                                   |
//! |-------------------------|----------------------|-------------------------------------------|
//! | `mode`                  | `async`              | `async` or `sync` (sync forces g=0, epsilon=0) |
//! | `n`                     | `50`                 | chunk size                                |
//! | `g`                     | `0.7`                | queue threshold fraction in [0,1]         |
//! | `epsilon`               | `0`                  | similarity filter threshold, 0 disables   |
//! | `metric`                | `l2`                 | `l2` or `linf`                            |
//! | `dt_ms`                 | `33`                 | control period                            |
//! | `aggregation`           | `replace`            | `replace` or `blend:<alpha>`              |
//! | `horizon`               | `600`                | control ticks after the first chunk       |
//! | `capture_delay_ms`      | `0`                  | observation capture cost                  |
//! | `latency.inference`     | `const:330`          | latency spec (`const:`, `uniform:`, `lognormal:`) |
//! | `latency.c2s`           | `const:0`            | client to server transit                  |
//! | `latency.s2c`           | `const:0`            | server to client transit                  |
//! | `policy`                | `scripted`           | `scripted`, `noise` or `replay`           |
//! | `policy.v_max`          | world `v_max`        | waypoint spacing of the scripted policy   |
//! | `policy.noise_sigma`    | `0.01`               | noise policy standard deviation           |
//! | `policy.replay_file`    | none                 | recording for the replay policy           |
//! | `world`                 | `pointmass`          | `pointmass` or `static`                   |
//! | `world.joints`          | seven zeros          | joint vector of the static world          |
//! | `world.cycle`           | `true`               | respawn the cube after each placement     |
//! | `world.stop_on_done`    | `false`              | end the run when a non-cycling episode ends |
//! | `world.v_max`           | `0.02`               | agent speed per tick                      |
//! | `world.grasp_radius`    | `0.05`               |                                           |
//! | `world.place_radius`    | `0.05`               |                                           |
//! | `world.agent`           | `0,0`                | agent start                               |
//! | `world.box`             | `0,0`                | box position                              |
//! | `world.cube`            | random               | first cube position                       |
//! | `world.spawn_radius`    | `1.1,1.5`            | cube spawn distance range from the box    |
//! | `world.disturbances`    | none                 | `tick:x,y; tick:x,y`                      |
//! | `seeds`                 | `0`                  | comma-separated run seeds                 |

use std::collections::HashSet;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::latency::{LatencyDist, LatencyModel, LatencyProfile, LatencyTarget};
use crate::policy::{NoisePolicy, Policy, PolicyError, ReplayPolicy, ScriptedPointMass};
use crate::types::{Aggregation, ClientConfig, DistanceMetric, JointState, ValidationError};
use crate::world::{
    Environment, PointMassWorld, StaticEnv, WorldConfig, POINT_MASS_ACTION_DIM,
    POINT_MASS_JOINT_DIM,
};

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid scenario: {0}")]
    Semantic(String),
}

impl From<ValidationError> for ScenarioError {
    fn from(e: ValidationError) -> Self {
        ScenarioError::Semantic(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    Sync,
    #[default]
    Async,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Sync => "sync",
            Mode::Async => "async",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sync" => Ok(Mode::Sync),
            "async" => Ok(Mode::Async),
            other => Err(format!("unknown mode {other:?}, expected sync or async")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PolicySpec {
    Scripted,
    Noise { sigma: f64 },
    Replay { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub enum WorldSpec {
    PointMass(WorldConfig),
    Static(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    /// Client parameters as written; see [`ScenarioConfig::client_config`]
    /// for the ones actually used.
    pub client: ClientConfig,
    pub latency: Vec<LatencyModel>,
    pub world: WorldSpec,
    pub policy: PolicySpec,
    /// Scripted waypoint spacing; `None` follows the world speed.
    pub policy_v_max: Option<f64>,
    pub mode: Mode,
    pub seeds: Vec<u64>,
    /// End the run once the episode is over (non-cycling worlds only).
    pub stop_on_done: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            client: ClientConfig::default(),
            latency: vec![LatencyModel {
                dist: LatencyDist::Constant(330),
                applies_to: LatencyTarget::ServerInference,
            }],
            world: WorldSpec::PointMass(WorldConfig::default()),
            policy: PolicySpec::Scripted,
            policy_v_max: None,
            mode: Mode::Async,
            seeds: vec![0],
            stop_on_done: false,
        }
    }
}

impl ScenarioConfig {
    /// Client parameters after mode rules: sync runs with g=0 and the
    /// filter off.
    pub fn client_config(&self) -> ClientConfig {
        let mut c = self.client.clone();
        if self.mode == Mode::Sync {
            c.g = 0.0;
            c.epsilon = 0.0;
        }
        c
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.client.validate()?;
        self.latency_profile(0)?;
        match &self.world {
            WorldSpec::PointMass(w) => w.validate()?,
            WorldSpec::Static(j) => {
                JointState::new(j.clone())?;
            }
        }
        if let PolicySpec::Noise { sigma } = self.policy {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return Err(ScenarioError::Semantic(format!(
                    "policy.noise_sigma must be >= 0, got {sigma}"
                )));
            }
        }
        if let Some(v) = self.policy_v_max {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ScenarioError::Semantic(format!(
                    "policy.v_max must be > 0, got {v}"
                )));
            }
        }
        if self.seeds.is_empty() {
            return Err(ScenarioError::Semantic("seeds must not be empty".into()));
        }
        if matches!(self.policy, PolicySpec::Scripted | PolicySpec::Noise { .. })
            && self.joint_dim() != POINT_MASS_JOINT_DIM
        {
            return Err(ScenarioError::Semantic(format!(
                "the {} policy needs {POINT_MASS_JOINT_DIM} joints, world has {}",
                if self.policy == PolicySpec::Scripted {
                    "scripted"
                } else {
                    "noise"
                },
                self.joint_dim()
            )));
        }
        Ok(())
    }

    pub fn joint_dim(&self) -> usize {
        match &self.world {
            WorldSpec::PointMass(_) => POINT_MASS_JOINT_DIM,
            WorldSpec::Static(j) => j.len(),
        }
    }

    pub fn latency_profile(&self, seed: u64) -> Result<LatencyProfile, ScenarioError> {
        Ok(LatencyProfile::from_models(&self.latency, seed)?)
    }

    /// Mean inference latency in ms (zero when unspecified).
    pub fn mean_inference_ms(&self) -> f64 {
        self.latency
            .iter()
            .find(|m| m.applies_to == LatencyTarget::ServerInference)
            .map_or(0.0, |m| m.dist.mean_ms())
    }

    pub fn set_latency(&mut self, target: LatencyTarget, dist: LatencyDist) {
        self.latency.retain(|m| m.applies_to != target);
        self.latency.push(LatencyModel {
            dist,
            applies_to: target,
        });
    }

    fn world_v_max(&self) -> f64 {
        match &self.world {
            WorldSpec::PointMass(w) => w.v_max,
            WorldSpec::Static(_) => WorldConfig::default().v_max,
        }
    }

    pub fn build_policy(&self, seed: u64) -> Result<Box<dyn Policy>, PolicyError> {
        let v_max = self.policy_v_max.unwrap_or_else(|| self.world_v_max());
        Ok(match &self.policy {
            PolicySpec::Scripted => Box::new(ScriptedPointMass::new(v_max)),
            PolicySpec::Noise { sigma } => Box::new(NoisePolicy::new(v_max, *sigma, seed)),
            PolicySpec::Replay { path } => Box::new(ReplayPolicy::load(path, self.joint_dim())?),
        })
    }

    pub fn build_world(&self, seed: u64) -> Box<dyn Environment> {
        match &self.world {
            WorldSpec::PointMass(w) => Box::new(PointMassWorld::new(w.clone(), seed)),
            WorldSpec::Static(j) => Box::new(StaticEnv::new(
                JointState::new(j.clone()).expect("validated"),
            )),
        }
    }

    /// Action dimension of the built-in policies; replay files carry their own.
    pub fn default_action_dim(&self) -> usize {
        POINT_MASS_ACTION_DIM
    }
}

fn parse_list<T: FromStr>(v: &str) -> Result<Vec<T>, String>
where
    T::Err: fmt::Display,
{
    v.split(',')
        .map(|s| s.trim().parse::<T>().map_err(|e| format!("{s:?}: {e}")))
        .collect()
}

fn parse_pair(v: &str) -> Result<[f64; 2], String> {
    let xs: Vec<f64> = parse_list(v)?;
    match xs.as_slice() {
        [x, y] => Ok([*x, *y]),
        _ => Err(format!("expected two comma-separated numbers, got {v:?}")),
    }
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got {v:?}")),
    }
}

fn parse_num<T: FromStr>(v: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("{v:?}: {e}"))
}

fn parse_disturbances(v: &str) -> Result<Vec<(u64, [f64; 2])>, String> {
    v.split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let (tick, xy) = item
                .split_once(':')
                .ok_or_else(|| format!("expected tick:x,y, got {item:?}"))?;
            Ok((parse_num(tick.trim())?, parse_pair(xy)?))
        })
        .collect()
}

/// Parses a scenario file. Syntax problems are reported with their line and
/// column; range and consistency problems are semantic errors.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, ScenarioError> {
    let mut cfg = ScenarioConfig::default();
    let mut world = WorldConfig::default();
    let mut static_joints = vec![0.0; POINT_MASS_JOINT_DIM];
    let mut world_kind = "pointmass".to_string();
    let mut policy_kind = "scripted".to_string();
    let mut sigma = 0.01;
    let mut replay_file: Option<PathBuf> = None;
    let mut seen = HashSet::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("");
        if content.trim().is_empty() {
            continue;
        }
        let err = |column: usize, message: String| ScenarioError::Parse {
            line,
            column,
            message,
        };
        let Some(eq) = content.find('=') else {
            let col = content.len() - content.trim_start().len() + 1;
            return Err(err(col, "expected `key = value`".into()));
        };
        let key = content[..eq].trim();
        let key_col = content.len() - content.trim_start().len() + 1;
        let value = content[eq + 1..].trim();
        let value_col = eq + 2 + (content[eq + 1..].len() - content[eq + 1..].trim_start().len());
        if key.is_empty() {
            return Err(err(key_col, "missing key".into()));
        }
        if !seen.insert(key.to_string()) {
            return Err(err(key_col, format!("duplicate key `{key}`")));
        }
        let verr = |m: String| err(value_col, m);

        match key {
            "mode" => cfg.mode = value.parse().map_err(verr)?,
            "n" => cfg.client.n = parse_num(value).map_err(verr)?,
            "g" => cfg.client.g = parse_num(value).map_err(verr)?,
            "epsilon" => cfg.client.epsilon = parse_num(value).map_err(verr)?,
            "metric" => {
                cfg.client.metric = value
                    .parse::<DistanceMetric>()
                    .map_err(|e| verr(e.to_string()))?
            }
            "dt_ms" => cfg.client.delta_t_ms = parse_num(value).map_err(verr)?,
            "aggregation" => {
                cfg.client.aggregation = value
                    .parse::<Aggregation>()
                    .map_err(|e| verr(e.to_string()))?
            }
            "horizon" => cfg.client.horizon = parse_num(value).map_err(verr)?,
            "capture_delay_ms" => cfg.client.capture_delay_ms = parse_num(value).map_err(verr)?,
            "latency.inference" | "latency.c2s" | "latency.s2c" => {
                let dist = value
                    .parse::<LatencyDist>()
                    .map_err(|e| verr(e.to_string()))?;
                let target = match key {
                    "latency.inference" => LatencyTarget::ServerInference,
                    "latency.c2s" => LatencyTarget::ClientToServer,
                    _ => LatencyTarget::ServerToClient,
                };
                cfg.set_latency(target, dist);
            }
            "policy" => match value {
                "scripted" | "noise" | "replay" => policy_kind = value.to_string(),
                _ => return Err(verr(format!("unknown policy {value:?}"))),
            },
            "policy.v_max" => cfg.policy_v_max = Some(parse_num(value).map_err(verr)?),
            "policy.noise_sigma" => sigma = parse_num(value).map_err(verr)?,
            "policy.replay_file" => replay_file = Some(PathBuf::from(value)),
            "world" => match value {
                "pointmass" | "static" => world_kind = value.to_string(),
                _ => return Err(verr(format!("unknown world {value:?}"))),
            },
            "world.joints" => static_joints = parse_list(value).map_err(verr)?,
            "world.cycle" => world.cycle = parse_bool(value).map_err(verr)?,
            "world.stop_on_done" => cfg.stop_on_done = parse_bool(value).map_err(verr)?,
            "world.v_max" => world.v_max = parse_num(value).map_err(verr)?,
            "world.grasp_radius" => world.grasp_radius = parse_num(value).map_err(verr)?,
            "world.place_radius" => world.place_radius = parse_num(value).map_err(verr)?,
            "world.agent" => world.agent_start = parse_pair(value).map_err(verr)?,
            "world.box" => world.box_xy = parse_pair(value).map_err(verr)?,
            "world.cube" => world.cube_start = Some(parse_pair(value).map_err(verr)?),
            "world.spawn_radius" => {
                let [lo, hi] = parse_pair(value).map_err(verr)?;
                world.spawn_radius = (lo, hi);
            }
            "world.disturbances" => world.disturbances = parse_disturbances(value).map_err(verr)?,
            "seeds" => cfg.seeds = parse_list(value).map_err(verr)?,
            _ => return Err(err(key_col, format!("unknown key `{key}`"))),
        }
    }

    cfg.world = match world_kind.as_str() {
        "static" => WorldSpec::Static(static_joints),
        _ => WorldSpec::PointMass(world),
    };
    cfg.policy = match policy_kind.as_str() {
        "noise" => PolicySpec::Noise { sigma },
        "replay" => PolicySpec::Replay {
            path: replay_file.ok_or_else(|| {
                ScenarioError::Semantic("policy = replay needs policy.replay_file".into())
            })?,
        },
        _ => PolicySpec::Scripted,
    };
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_uses_defaults() {
        let cfg = parse_scenario("n = 50\ng = 0.7\n").unwrap();
        assert_eq!(cfg.client, ClientConfig::default());
        assert_eq!(cfg.mode, Mode::Async);
        assert_eq!(cfg.seeds, vec![0]);
        assert_eq!(cfg.mean_inference_ms(), 330.0);
        assert_eq!(cfg.world, WorldSpec::PointMass(WorldConfig::default()));
    }

    #[test]
    fn g_out_of_range_is_semantic() {
        assert!(matches!(
            parse_scenario("g = 1.5"),
            Err(ScenarioError::Semantic(_))
        ));
    }

    #[test]
    fn duplicate_key_is_parse_error() {
        let e = parse_scenario("n = 10\n  n = 20\n").unwrap_err();
        assert_eq!(
            e,
            ScenarioError::Parse {
                line: 2,
                column: 3,
                message: "duplicate key `n`".into()
            }
        );
    }

    #[test]
    fn unknown_key_and_bad_value_positions() {
        match parse_scenario("# hi\nbogus = 1\n").unwrap_err() {
            ScenarioError::Parse { line, column, .. } => assert_eq!((line, column), (2, 1)),
            e => panic!("{e:?}"),
        }
        match parse_scenario("n = ten").unwrap_err() {
            ScenarioError::Parse { line, column, .. } => assert_eq!((line, column), (1, 5)),
            e => panic!("{e:?}"),
        }
        assert!(matches!(
            parse_scenario("just words"),
            Err(ScenarioError::Parse { .. })
        ));
    }

    #[test]
    fn sync_forces_g_and_epsilon() {
        let cfg = parse_scenario("mode = sync\ng = 0.7\nepsilon = 0.3\n").unwrap();
        let c = cfg.client_config();
        assert_eq!((c.g, c.epsilon), (0.0, 0.0));
        assert_eq!(cfg.client.g, 0.7);
    }

    #[test]
    fn full_file() {
        let text = "\
mode = async
n = 25
g = 0.5            # trailing comment
epsilon = 0.01
metric = linf
dt_ms = 20
aggregation = blend:0.25
horizon = 100
latency.inference = uniform:100:200
latency.c2s = const:5
latency.s2c = const:5
policy = noise
policy.noise_sigma = 0.02
world.cycle = false
world.stop_on_done = true
world.cube = 1.2, 0
world.disturbances = 30: -1.2,0 ; 80:0,1
seeds = 1,2,3
";
        let cfg = parse_scenario(text).unwrap();
        assert_eq!(cfg.client.n, 25);
        assert_eq!(cfg.client.metric, DistanceMetric::Linf);
        assert_eq!(
            cfg.client.aggregation,
            Aggregation::ExpBlend { alpha: 0.25 }
        );
        assert_eq!(cfg.latency.len(), 3);
        assert_eq!(cfg.policy, PolicySpec::Noise { sigma: 0.02 });
        assert!(cfg.stop_on_done);
        let WorldSpec::PointMass(w) = &cfg.world else {
            panic!()
        };
        assert!(!w.cycle);
        assert_eq!(w.cube_start, Some([1.2, 0.0]));
        assert_eq!(w.disturbances, vec![(30, [-1.2, 0.0]), (80, [0.0, 1.0])]);
        assert_eq!(cfg.seeds, vec![1, 2, 3]);
    }

    #[test]
    fn replay_needs_file_and_static_world_dims() {
        assert!(matches!(
            parse_scenario("policy = replay"),
            Err(ScenarioError::Semantic(_))
        ));
        assert!(matches!(
            parse_scenario("world = static\nworld.joints = 0,0,0"),
            Err(ScenarioError::Semantic(_))
        ));
        parse_scenario("world = static\nworld.joints = 1,0,1,0,0,0,0").unwrap();
    }
}
