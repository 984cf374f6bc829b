//! Environments the client loop acts on.
//!
//! [`PointMassWorld`] is a desk-scale pick-and-place stand-in: a point agent
//! drives to a cube, grasps it by proximity, and carries it to a box.
//! Observations encode `(agent_xy, cube_xy, box_xy, phase)` as seven joints.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::types::{Action, JointState, ValidationError};

pub const POINT_MASS_JOINT_DIM: usize = 7;
pub const POINT_MASS_ACTION_DIM: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub enum EnvEvent {
    /// A pick-and-place cycle finished; `total` counts completions so far.
    TaskDone { total: u32 },
    /// The cube was moved externally.
    Disturbance { cube: [f64; 2] },
}

/// What the client loop needs from the world.
pub trait Environment {
    fn joint_dim(&self) -> usize;
    fn observe(&self) -> JointState;
    /// Advances one control tick. `action` is `None` on idle ticks.
    fn step(&mut self, tick: u64, action: Option<&Action>) -> Vec<EnvEvent>;
    /// True once a non-cycling episode is over.
    fn finished(&self) -> bool {
        false
    }
}

/// A world where nothing ever moves.
#[derive(Debug, Clone)]
pub struct StaticEnv {
    joints: JointState,
}

impl StaticEnv {
    pub fn new(joints: JointState) -> Self {
        Self { joints }
    }
}

impl Environment for StaticEnv {
    fn joint_dim(&self) -> usize {
        self.joints.dim()
    }

    fn observe(&self) -> JointState {
        self.joints.clone()
    }

    fn step(&mut self, _tick: u64, _action: Option<&Action>) -> Vec<EnvEvent> {
        Vec::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    ToCube,
    Grasped,
    Done,
}

impl Phase {
    pub fn as_real(self) -> f64 {
        match self {
            Phase::ToCube => 0.0,
            Phase::Grasped => 1.0,
            Phase::Done => 2.0,
        }
    }

    pub fn from_real(v: f64) -> Phase {
        if v < 0.5 {
            Phase::ToCube
        } else if v < 1.5 {
            Phase::Grasped
        } else {
            Phase::Done
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub agent_start: [f64; 2],
    pub box_xy: [f64; 2],
    /// First cube position; `None` draws it like a respawn.
    pub cube_start: Option<[f64; 2]>,
    pub grasp_radius: f64,
    pub place_radius: f64,
    /// Maximum agent displacement per tick.
    pub v_max: f64,
    /// Respawn the cube after each completion instead of ending the episode.
    pub cycle: bool,
    /// Cube spawn distance from the box is drawn from this range.
    pub spawn_radius: (f64, f64),
    /// `(tick, new cube position)`; only applied while heading to the cube.
    pub disturbances: Vec<(u64, [f64; 2])>,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            agent_start: [0.0, 0.0],
            box_xy: [0.0, 0.0],
            cube_start: None,
            grasp_radius: 0.05,
            place_radius: 0.05,
            v_max: 0.02,
            cycle: true,
            spawn_radius: (1.1, 1.5),
            disturbances: Vec::new(),
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), ValidationError> {
        let bad = |m: &str| Err(ValidationError::InvalidConfig(m.to_string()));
        if !(self.grasp_radius > 0.0 && self.place_radius > 0.0) {
            return bad("grasp and place radii must be > 0");
        }
        if !(self.v_max > 0.0 && self.v_max.is_finite()) {
            return bad("v_max must be > 0");
        }
        let (lo, hi) = self.spawn_radius;
        if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
            return bad("spawn radius range must satisfy 0 <= lo <= hi");
        }
        Ok(())
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Moves `from` toward `to` by at most `step`, landing exactly on `to` when
/// within reach.
pub fn step_toward(from: [f64; 2], to: [f64; 2], step: f64) -> [f64; 2] {
    let d = dist(from, to);
    if d <= step + 1e-12 {
        to
    } else {
        let k = step / d;
        [
            from[0] + (to[0] - from[0]) * k,
            from[1] + (to[1] - from[1]) * k,
        ]
    }
}

#[derive(Debug, Clone)]
pub struct PointMassWorld {
    pub agent: [f64; 2],
    pub cube: [f64; 2],
    pub box_xy: [f64; 2],
    pub phase: Phase,
    config: WorldConfig,
    rng: ChaCha8Rng,
    completed: u32,
}

impl PointMassWorld {
    pub fn new(config: WorldConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x776f_726c_6400);
        let cube = match config.cube_start {
            Some(c) => c,
            None => spawn(&mut rng, config.box_xy, config.spawn_radius),
        };
        Self {
            agent: config.agent_start,
            cube,
            box_xy: config.box_xy,
            phase: Phase::ToCube,
            config,
            rng,
            completed: 0,
        }
    }

    pub fn completed(&self) -> u32 {
        self.completed
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }
}

fn spawn(rng: &mut ChaCha8Rng, center: [f64; 2], (lo, hi): (f64, f64)) -> [f64; 2] {
    let r = if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    };
    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    [center[0] + r * theta.cos(), center[1] + r * theta.sin()]
}

impl Environment for PointMassWorld {
    fn joint_dim(&self) -> usize {
        POINT_MASS_JOINT_DIM
    }

    fn observe(&self) -> JointState {
        JointState::new(vec![
            self.agent[0],
            self.agent[1],
            self.cube[0],
            self.cube[1],
            self.box_xy[0],
            self.box_xy[1],
            self.phase.as_real(),
        ])
        .expect("world state is finite")
    }

    fn step(&mut self, tick: u64, action: Option<&Action>) -> Vec<EnvEvent> {
        let mut events = Vec::new();
        for &(at, cube) in &self.config.disturbances {
            if at == tick && self.phase == Phase::ToCube {
                self.cube = cube;
                events.push(EnvEvent::Disturbance { cube });
            }
        }
        if self.phase == Phase::Done {
            return events;
        }
        if let Some(a) = action {
            let target = [a.values()[0], a.values()[1]];
            self.agent = step_toward(self.agent, target, self.config.v_max);
            if self.phase == Phase::Grasped {
                self.cube = self.agent;
            }
        }
        if self.phase == Phase::ToCube && dist(self.agent, self.cube) <= self.config.grasp_radius {
            self.phase = Phase::Grasped;
            self.cube = self.agent;
        }
        if self.phase == Phase::Grasped && dist(self.agent, self.box_xy) <= self.config.place_radius
        {
            self.completed += 1;
            events.push(EnvEvent::TaskDone {
                total: self.completed,
            });
            if self.config.cycle {
                self.cube = spawn(&mut self.rng, self.box_xy, self.config.spawn_radius);
                self.phase = Phase::ToCube;
            } else {
                self.phase = Phase::Done;
            }
        }
        events
    }

    fn finished(&self) -> bool {
        self.phase == Phase::Done
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world(cube: [f64; 2], cycle: bool) -> PointMassWorld {
        PointMassWorld::new(
            WorldConfig {
                cube_start: Some(cube),
                box_xy: [1.0, 0.0],
                cycle,
                ..WorldConfig::default()
            },
            0,
        )
    }

    fn act(x: f64, y: f64) -> Action {
        Action::new(vec![x, y]).unwrap()
    }

    #[test]
    fn agent_on_cube_grasps() {
        let mut w = world([0.0, 0.0], false);
        w.step(0, None);
        assert_eq!(w.phase, Phase::Grasped);
    }

    #[test]
    fn motion_is_clamped() {
        let mut w = world([5.0, 5.0], false);
        w.step(0, Some(&act(1.0, 0.0)));
        assert!((w.agent[0] - 0.02).abs() < 1e-12);
        assert_eq!(w.agent[1], 0.0);
    }

    #[test]
    fn carry_and_place_finishes_episode() {
        let mut w = world([0.0, 0.0], false);
        w.step(0, None);
        let mut done = false;
        for t in 1..100 {
            let ev = w.step(t, Some(&act(1.0, 0.0)));
            assert_eq!(w.cube, w.agent);
            if ev.contains(&EnvEvent::TaskDone { total: 1 }) {
                done = true;
                break;
            }
        }
        assert!(done);
        assert_eq!(w.phase, Phase::Done);
        assert!(w.finished());
        // terminal: further actions change nothing
        let agent = w.agent;
        assert!(w.step(200, Some(&act(-5.0, 0.0))).is_empty());
        assert_eq!(w.agent, agent);
    }

    #[test]
    fn cycle_mode_respawns() {
        let mut w = world([0.0, 0.0], true);
        w.step(0, None);
        for t in 1..100 {
            if !w.step(t, Some(&act(1.0, 0.0))).is_empty() {
                break;
            }
        }
        assert_eq!(w.completed(), 1);
        assert_eq!(w.phase, Phase::ToCube);
        let r = dist(w.cube, w.box_xy);
        assert!((1.1..=1.5).contains(&r), "respawn radius {r}");
    }

    #[test]
    fn respawns_depend_only_on_seed() {
        let cfg = WorldConfig::default();
        let a = PointMassWorld::new(cfg.clone(), 11);
        let b = PointMassWorld::new(cfg.clone(), 11);
        let c = PointMassWorld::new(cfg, 12);
        assert_eq!(a.cube, b.cube);
        assert_ne!(a.cube, c.cube);
    }

    #[test]
    fn disturbance_moves_cube_only_before_grasp() {
        let mut cfg = WorldConfig {
            cube_start: Some([0.5, 0.0]),
            disturbances: vec![(3, [0.0, 0.5]), (10, [9.0, 9.0])],
            cycle: false,
            ..WorldConfig::default()
        };
        cfg.agent_start = [0.0, 0.0];
        let mut w = PointMassWorld::new(cfg, 0);
        assert!(w.step(2, None).is_empty());
        assert_eq!(
            w.step(3, None),
            vec![EnvEvent::Disturbance { cube: [0.0, 0.5] }]
        );
        assert_eq!(w.cube, [0.0, 0.5]);
        w.agent = [0.0, 0.5];
        w.step(4, None);
        assert_eq!(w.phase, Phase::Grasped);
        assert!(w.step(10, None).is_empty());
    }

    #[test]
    fn observation_layout() {
        let w = world([0.3, 0.4], false);
        assert_eq!(w.observe().values(), &[0.0, 0.0, 0.3, 0.4, 1.0, 0.0, 0.0]);
    }
}
