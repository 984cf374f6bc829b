//! Policy server: a pluggable policy behind a latency-injection layer.
//!
//! [`PolicyServer::process`] only computes the chunk and samples how long it
//! should take; carriers apply the delay (virtual scheduling in the
//! simulator, sleeping in [`serve_connection`]).

use std::io::{BufReader, BufWriter};
use std::net::{TcpListener, TcpStream};
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::latency::LatencyProfile;
use crate::policy::{Policy, PolicyError};
use crate::transport::{read_message, write_message, Hello, Message, ProtocolError};
use crate::types::{validate_chunk, ActionChunk, Observation, ValidationError};

#[derive(Debug, Error)]
pub enum ServerError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("policy failed: {0}")]
    Policy(#[from] PolicyError),
    #[error("policy produced an invalid chunk: {0}")]
    InvalidChunk(#[from] ValidationError),
}

/// A chunk together with the inference delay sampled for it.
#[derive(Debug, Clone, PartialEq)]
pub struct ServedChunk {
    pub chunk: ActionChunk,
    pub inference_ms: u64,
}

pub struct PolicyServer {
    policy: Box<dyn Policy>,
    n: usize,
    latency: LatencyProfile,
    next_chunk_id: u64,
}

impl PolicyServer {
    pub fn new(policy: Box<dyn Policy>, n: usize, latency: LatencyProfile) -> Self {
        assert!(n >= 1, "chunk size must be positive");
        Self {
            policy,
            n,
            latency,
            next_chunk_id: 0,
        }
    }

    pub fn hello(&self) -> Hello {
        Hello::new(self.policy.action_dim(), self.policy.joint_dim())
    }

    pub fn chunk_size(&self) -> usize {
        self.n
    }

    /// Predicts the chunk for `obs`. Chunk ids increase by one per call, so
    /// id order is arrival order.
    pub fn process(&mut self, obs: &Observation) -> Result<ServedChunk, ServerError> {
        let inference_ms = self.latency.sample_inference();
        let actions = self.policy.predict(obs, self.n)?;
        let chunk = ActionChunk {
            start_timestep: obs.timestep,
            chunk_id: self.next_chunk_id,
            actions,
        };
        validate_chunk(&chunk, self.policy.action_dim())?;
        self.next_chunk_id += 1;
        Ok(ServedChunk {
            chunk,
            inference_ms,
        })
    }

    /// Transit legs are sampled by whichever carrier moves the messages.
    pub fn latency_mut(&mut self) -> &mut LatencyProfile {
        &mut self.latency
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SessionStats {
    pub observations: u64,
    pub chunks: u64,
}

fn sleep_until(deadline: Instant) {
    let now = Instant::now();
    if deadline > now {
        thread::sleep(deadline - now);
    }
}

/// Serves one client over a stream socket until BYE or end of stream.
///
/// Expects HELLO first and answers with the server's own HELLO; any
/// mismatch aborts the session. Requests are handled strictly in order.
pub fn serve_connection(
    stream: TcpStream,
    server: &mut PolicyServer,
) -> Result<SessionStats, ServerError> {
    stream.set_nodelay(true).map_err(ProtocolError::from)?;
    let mut reader = BufReader::new(stream.try_clone().map_err(ProtocolError::from)?);
    let mut writer = BufWriter::new(stream);
    let mut stats = SessionStats::default();

    let local = server.hello();
    match read_message(&mut reader)? {
        Some(Message::Hello(remote)) => {
            write_message(&mut writer, &Message::Hello(local))?;
            local.check_compatible(&remote)?;
        }
        Some(_) => return Err(ProtocolError::Unexpected("expected HELLO").into()),
        None => return Ok(stats),
    }

    loop {
        let msg = read_message(&mut reader)?;
        let received = Instant::now();
        match msg {
            Some(Message::Observation(obs)) => {
                stats.observations += 1;
                let c2s = server.latency_mut().sample_client_to_server();
                let served = server.process(&obs)?;
                sleep_until(received + Duration::from_millis(c2s + served.inference_ms));
                let s2c = server.latency_mut().sample_server_to_client();
                thread::sleep(Duration::from_millis(s2c));
                write_message(&mut writer, &Message::ActionChunk(served.chunk))?;
                stats.chunks += 1;
            }
            Some(Message::Bye) | None => return Ok(stats),
            Some(Message::Hello(_)) => return Err(ProtocolError::Unexpected("second HELLO").into()),
            Some(Message::ActionChunk(_)) => {
                return Err(ProtocolError::Unexpected("ACTION_CHUNK from client").into())
            }
        }
    }
}

/// Accepts sessions one at a time. Stops after `max_sessions` when given.
pub fn serve(
    listener: TcpListener,
    server: &mut PolicyServer,
    max_sessions: Option<usize>,
) -> Result<(), ServerError> {
    for (served, stream) in listener.incoming().enumerate() {
        let stream = stream.map_err(ProtocolError::from)?;
        serve_connection(stream, server)?;
        if max_sessions.is_some_and(|m| served + 1 >= m) {
            break;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latency::LatencyDist;
    use crate::policy::ScriptedPointMass;
    use crate::types::JointState;

    fn obs(t: u64) -> Observation {
        Observation {
            timestep: t,
            joints: JointState::new(vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]).unwrap(),
            aux: vec![],
            capture_time_ms: 0,
        }
    }

    fn server(dist: LatencyDist, seed: u64) -> PolicyServer {
        PolicyServer::new(
            Box::new(ScriptedPointMass::new(0.1)),
            50,
            LatencyProfile::inference_only(dist, seed),
        )
    }

    #[test]
    fn zero_latency_chunk_starts_at_observation() {
        let mut s = server(LatencyDist::Constant(0), 0);
        let out = s.process(&obs(17)).unwrap();
        assert_eq!(out.chunk.start_timestep, 17);
        assert_eq!(out.chunk.len(), 50);
        assert_eq!(out.inference_ms, 0);
    }

    #[test]
    fn constant_latency_is_reported() {
        let mut s = server(LatencyDist::Constant(330), 0);
        assert_eq!(s.process(&obs(0)).unwrap().inference_ms, 330);
    }

    #[test]
    fn chunk_ids_follow_arrival_order() {
        let mut s = server(LatencyDist::Constant(0), 0);
        let ids: Vec<u64> = (0..5)
            .map(|t| s.process(&obs(t)).unwrap().chunk.chunk_id)
            .collect();
        assert_eq!(ids, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn seeded_uniform_latency_repeats() {
        let run = || {
            let mut s = server(
                LatencyDist::Uniform {
                    lo_ms: 100,
                    hi_ms: 200,
                },
                42,
            );
            (0..20)
                .map(|t| s.process(&obs(t)).unwrap().inference_ms)
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
