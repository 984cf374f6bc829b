//! Deterministic discrete-event simulation of client, server and world.
//!
//! Control tick `t` happens at virtual time `t * dt_ms`. Before each tick
//! every network or server event due at or before that instant fires, so a
//! chunk landing exactly on a tick boundary is merged by that tick. The
//! initial request is served before tick 0, as on a real robot which waits
//! for its first chunk before moving.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

use crate::client::{Arrival, ClientError, RobotClient};
use crate::policy::PolicyError;
use crate::scenario::{ScenarioConfig, ScenarioError, WorldSpec};
use crate::server::{PolicyServer, ServerError};
use crate::trace::{EventKind, RunTrace};
use crate::transport::{InProcessLink, Message, ProtocolError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("server: {0}")]
    Server(#[from] ServerError),
    #[error("client: {0}")]
    Client(#[from] ClientError),
    #[error("in-process link: {0}")]
    Protocol(#[from] ProtocolError),
    #[error("event scheduled at {at} ms, clock already at {now} ms")]
    PastEvent { at: u64, now: u64 },
    #[error("policy expects {policy} joints but the world has {world}")]
    JointDim { policy: usize, world: usize },
}

struct Scheduled<E> {
    at: u64,
    seq: u64,
    event: E,
}

impl<E> PartialEq for Scheduled<E> {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl<E> Eq for Scheduled<E> {}

impl<E> PartialOrd for Scheduled<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Scheduled<E> {
    // reversed: BinaryHeap is a max-heap and we want the earliest first
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

/// Integer-millisecond event clock. Equal-time events fire in the order
/// they were scheduled.
pub struct VirtualClock<E> {
    now_ms: u64,
    next_seq: u64,
    heap: BinaryHeap<Scheduled<E>>,
}

impl<E> Default for VirtualClock<E> {
    fn default() -> Self {
        Self {
            now_ms: 0,
            next_seq: 0,
            heap: BinaryHeap::new(),
        }
    }
}

impl<E> VirtualClock<E> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now_ms(&self) -> u64 {
        self.now_ms
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn schedule_at(&mut self, at: u64, event: E) -> Result<(), SimError> {
        if at < self.now_ms {
            return Err(SimError::PastEvent {
                at,
                now: self.now_ms,
            });
        }
        self.heap.push(Scheduled {
            at,
            seq: self.next_seq,
            event,
        });
        self.next_seq += 1;
        Ok(())
    }

    /// Pops the earliest event due at or before `limit`, moving the clock
    /// to its time.
    pub fn pop_due(&mut self, limit: u64) -> Option<(u64, E)> {
        if self.heap.peek()?.at > limit {
            return None;
        }
        let s = self.heap.pop()?;
        self.now_ms = s.at;
        Some((s.at, s.event))
    }

    /// Moves the clock forward without firing anything. Never goes back.
    pub fn advance_to(&mut self, t: u64) {
        self.now_ms = self.now_ms.max(t);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SimEvent {
    /// Head of the client-to-server link reaches the server.
    ServerRecv,
    /// Head of the server-to-client link reaches the client.
    ClientRecv,
}

/// Runs one scenario with one seed and returns the client's trace.
pub fn simulate(scenario: &ScenarioConfig, seed: u64) -> Result<RunTrace, SimError> {
    scenario.validate()?;
    let config = scenario.client_config();
    let policy = scenario.build_policy(seed)?;
    let mut world = scenario.build_world(seed);
    if policy.joint_dim() != world.joint_dim() {
        return Err(SimError::JointDim {
            policy: policy.joint_dim(),
            world: world.joint_dim(),
        });
    }
    let action_dim = policy.action_dim();
    let mut server = PolicyServer::new(policy, config.n, scenario.latency_profile(seed)?);
    let mut client =
        RobotClient::new(config.clone(), action_dim).map_err(|e| SimError::Scenario(e.into()))?;

    let obs = client.start(world.as_ref())?;
    let c2s = server.latency_mut().sample_client_to_server();
    let served = server.process(&obs)?;
    let s2c = server.latency_mut().sample_server_to_client();
    let send_ms = obs.capture_time_ms + config.capture_delay_ms;
    client.finish_start(Arrival {
        chunk: served.chunk,
        arrived_ms: send_ms + c2s + served.inference_ms + s2c,
    })?;

    let mut clock = VirtualClock::new();
    let mut uplink = InProcessLink::new();
    let mut downlink = InProcessLink::new();
    let mut server_free_at = 0u64;
    let mut inbox = Vec::new();

    for t in 0..config.horizon {
        let now = t * config.delta_t_ms;
        while let Some((at, ev)) = clock.pop_due(now) {
            match ev {
                SimEvent::ServerRecv => {
                    let Some(msg) = uplink.recv_due(at) else {
                        continue;
                    };
                    let Message::Observation(obs) = msg? else {
                        return Err(ProtocolError::Unexpected("non-observation on uplink").into());
                    };
                    let served = server.process(&obs)?;
                    let done = at.max(server_free_at) + served.inference_ms;
                    server_free_at = done;
                    let s2c = server.latency_mut().sample_server_to_client();
                    let deliver = downlink.send(done, s2c, &Message::ActionChunk(served.chunk));
                    clock.schedule_at(deliver, SimEvent::ClientRecv)?;
                }
                SimEvent::ClientRecv => {
                    let Some(msg) = downlink.recv_due(at) else {
                        continue;
                    };
                    let Message::ActionChunk(chunk) = msg? else {
                        return Err(ProtocolError::Unexpected("non-chunk on downlink").into());
                    };
                    inbox.push(Arrival {
                        chunk,
                        arrived_ms: at,
                    });
                }
            }
        }
        clock.advance_to(now);

        let outcome = client.tick(std::mem::take(&mut inbox), world.as_mut())?;
        if let Some(obs) = outcome.outgoing {
            let send_ms = obs.capture_time_ms + config.capture_delay_ms;
            let c2s = server.latency_mut().sample_client_to_server();
            let deliver = uplink.send(send_ms, c2s, &Message::Observation(obs));
            clock.schedule_at(deliver, SimEvent::ServerRecv)?;
        }
        if scenario.stop_on_done && world.finished() {
            break;
        }
    }
    Ok(client.into_trace(seed, true))
}

/// Pick-and-place cycles completed within a virtual-time budget.
pub fn throughput_experiment(
    scenario: &ScenarioConfig,
    budget_ms: u64,
    seed: u64,
) -> Result<u32, SimError> {
    if let WorldSpec::PointMass(w) = &scenario.world {
        if !w.cycle {
            return Err(
                ScenarioError::Semantic("throughput runs need world.cycle = true".into()).into(),
            );
        }
    }
    let mut s = scenario.clone();
    s.client.horizon = budget_ms / s.client.delta_t_ms.max(1);
    s.stop_on_done = false;
    let trace = simulate(&s, seed)?;
    Ok(trace.count(|k| matches!(k, EventKind::TaskDone { .. })) as u32)
}
