//! The robot-side control loop.
//!
//! [`RobotClient`] holds the loop state and performs one control tick at a
//! time; it knows nothing about clocks or sockets. The simulator drives it
//! on virtual time and [`run_tcp_client`] drives it on the wall clock.
//!
//! Within a tick, in order:
//! 1. merge the chunk that arrived by the tick boundary (if any) and clear
//!    the pending request;
//! 2. pop and execute one action, or hold and count an idle tick;
//! 3. if the post-pop queue is below threshold, or this tick starved,
//!    capture an observation and, when no request is in flight and the
//!    similarity filter agrees, send it.
//!
//! Action timesteps advance only when an action executes, so a chunk
//! predicted while the robot was holding still lines up with the robot.

use std::io::{BufReader, BufWriter};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::filter::{FilterDecision, FilterState};
use crate::queue::{below_threshold, ActionQueue, QueueError};
use crate::trace::{EventKind, RunTrace, TraceEvent, TraceHeader};
use crate::transport::{read_message, write_message, Hello, Message, ProtocolError};
use crate::types::{
    validate_chunk, Action, ActionChunk, ClientConfig, Observation, ValidationError,
};
use crate::world::{EnvEvent, Environment};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("chunk arrived with no request in flight")]
    UnsolicitedChunk,
    #[error("{0} chunks arrived in one tick; at most one request is ever in flight")]
    TooManyArrivals(usize),
    #[error("invalid chunk: {0}")]
    InvalidChunk(#[from] ValidationError),
    #[error("merge failed: {0}")]
    Merge(#[from] QueueError),
    #[error("transport: {0}")]
    Transport(#[from] ProtocolError),
    #[error("client already initialized")]
    AlreadyStarted,
    #[error("client not initialized")]
    NotStarted,
}

/// A chunk delivered to the client together with its arrival time.
#[derive(Debug, Clone, PartialEq)]
pub struct Arrival {
    pub chunk: ActionChunk,
    pub arrived_ms: u64,
}

/// The single in-flight request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pending {
    pub sent_tick: u64,
    pub send_time_ms: u64,
    pub timestep: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TickOutcome {
    pub executed: Option<Action>,
    /// Observation to ship to the server, if one was sent this tick.
    pub outgoing: Option<Observation>,
}

pub struct RobotClient {
    config: ClientConfig,
    action_dim: usize,
    tick: u64,
    step: u64,
    queue: ActionQueue,
    filter: FilterState,
    pending: Option<Pending>,
    idle_ticks: u64,
    started: bool,
    events: Vec<TraceEvent>,
}

impl RobotClient {
    pub fn new(config: ClientConfig, action_dim: usize) -> Result<Self, ValidationError> {
        config.validate()?;
        let filter = FilterState::new(config.epsilon, config.metric);
        Ok(Self {
            config,
            action_dim,
            tick: 0,
            step: 0,
            queue: ActionQueue::new(),
            filter,
            pending: None,
            idle_ticks: 0,
            started: false,
            events: Vec::new(),
        })
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    /// Next tick to run.
    pub fn tick_index(&self) -> u64 {
        self.tick
    }

    /// Timestep of the next action to execute.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn queue(&self) -> &ActionQueue {
        &self.queue
    }

    pub fn pending(&self) -> Option<Pending> {
        self.pending
    }

    pub fn idle_ticks(&self) -> u64 {
        self.idle_ticks
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    fn record(&mut self, kind: EventKind) {
        self.events.push(TraceEvent {
            tick: self.tick,
            kind,
        });
    }

    fn now_ms(&self) -> u64 {
        self.tick * self.config.delta_t_ms
    }

    fn capture(&self, env: &dyn Environment) -> Observation {
        Observation {
            timestep: self.step,
            joints: env.observe(),
            aux: Vec::new(),
            capture_time_ms: self.now_ms(),
        }
    }

    /// Captures and "sends" the initial observation.
    pub fn start(&mut self, env: &dyn Environment) -> Result<Observation, ClientError> {
        if self.started {
            return Err(ClientError::AlreadyStarted);
        }
        self.started = true;
        let obs = self.capture(env);
        self.send(&obs, false);
        Ok(obs)
    }

    /// Installs the initial chunk, which the loop waits for before tick 0.
    pub fn finish_start(&mut self, arrival: Arrival) -> Result<(), ClientError> {
        if !self.started {
            return Err(ClientError::NotStarted);
        }
        self.accept(arrival)
    }

    fn send(&mut self, obs: &Observation, forced: bool) {
        let send_time_ms = obs.capture_time_ms + self.config.capture_delay_ms;
        self.filter.mark_processed(&obs.joints);
        self.pending = Some(Pending {
            sent_tick: self.tick,
            send_time_ms,
            timestep: obs.timestep,
        });
        let queue_len = self.queue.len() as u32;
        self.record(EventKind::ObsSent {
            timestep: obs.timestep,
            forced,
            queue_len,
            send_time_ms,
        });
    }

    fn accept(&mut self, arrival: Arrival) -> Result<(), ClientError> {
        let pending = self.pending.ok_or(ClientError::UnsolicitedChunk)?;
        let chunk = arrival.chunk;
        validate_chunk(&chunk, self.action_dim)?;
        self.record(EventKind::ChunkArrived {
            chunk_id: chunk.chunk_id,
            start: chunk.start_timestep,
            len: chunk.len() as u32,
            latency_ms: arrival.arrived_ms.saturating_sub(pending.send_time_ms),
        });
        let report = self
            .queue
            .merge_chunk(&chunk, self.step, self.config.aggregation)?;
        self.pending = None;
        let queue_len = self.queue.len() as u32;
        self.record(EventKind::ChunkMerged {
            chunk_id: chunk.chunk_id,
            start: chunk.start_timestep,
            len: chunk.len() as u32,
            step: self.step,
            dropped: report.dropped_stale as u32,
            queue_len,
        });
        Ok(())
    }

    /// Runs one control tick.
    pub fn tick(
        &mut self,
        arrivals: Vec<Arrival>,
        env: &mut dyn Environment,
    ) -> Result<TickOutcome, ClientError> {
        if !self.started {
            return Err(ClientError::NotStarted);
        }
        if arrivals.len() > 1 {
            return Err(ClientError::TooManyArrivals(arrivals.len()));
        }
        for arrival in arrivals {
            self.accept(arrival)?;
        }

        let mut outcome = TickOutcome::default();
        let starved = match self.queue.pop_front() {
            Ok((timestep, action)) => {
                debug_assert_eq!(timestep, self.step);
                self.step += 1;
                let env_events = env.step(self.tick, Some(&action));
                let queue_len = self.queue.len() as u32;
                self.record(EventKind::Exec {
                    timestep,
                    queue_len,
                    action: action.values().to_vec(),
                });
                self.record_env(env_events);
                outcome.executed = Some(action);
                false
            }
            Err(QueueError::EmptyQueue) => {
                let env_events = env.step(self.tick, None);
                self.idle_ticks += 1;
                self.record(EventKind::Idle { queue_len: 0 });
                self.record_env(env_events);
                true
            }
            Err(e) => return Err(e.into()),
        };

        let n = self.config.n;
        let wants = starved || below_threshold(self.queue.len(), n, self.config.g);
        if wants && self.pending.is_none() {
            let obs = self.capture(env);
            let queue_empty = self.queue.is_empty();
            match self.filter.decide(&obs, queue_empty)? {
                FilterDecision::Suppressed { distance } => {
                    let queue_len = self.queue.len() as u32;
                    self.record(EventKind::ObsSuppressed {
                        timestep: obs.timestep,
                        distance,
                        queue_len,
                    });
                }
                decision => {
                    self.send(&obs, decision == FilterDecision::Forced);
                    outcome.outgoing = Some(obs);
                }
            }
        }

        self.tick += 1;
        Ok(outcome)
    }

    fn record_env(&mut self, env_events: Vec<EnvEvent>) {
        for e in env_events {
            let kind = match e {
                EnvEvent::TaskDone { total } => EventKind::TaskDone { total },
                EnvEvent::Disturbance { cube } => EventKind::Disturbance { cube },
            };
            self.record(kind);
        }
    }

    /// Consumes the client into a trace.
    pub fn into_trace(self, seed: u64, complete: bool) -> RunTrace {
        RunTrace {
            header: TraceHeader {
                n: self.config.n as u64,
                g: self.config.g,
                delta_t_ms: self.config.delta_t_ms,
                horizon: self.config.horizon,
                ticks_run: self.tick,
                seed,
                complete,
            },
            events: self.events,
        }
    }
}

/// Result of a wall-clock run: the trace plus the error that stopped it
/// early, if any (in which case the trace is flagged incomplete).
#[derive(Debug)]
pub struct TcpRunResult {
    pub trace: RunTrace,
    pub error: Option<ClientError>,
}

/// Runs the control loop against a remote policy server on the wall clock.
///
/// A background thread reads chunks and timestamps them; only the loop
/// thread touches the client state.
pub fn run_tcp_client<A: ToSocketAddrs>(
    addr: A,
    config: ClientConfig,
    action_dim: usize,
    env: &mut dyn Environment,
    seed: u64,
    stop_when_finished: bool,
) -> Result<TcpRunResult, ClientError> {
    let mut client = RobotClient::new(config.clone(), action_dim)?;
    let stream = TcpStream::connect(addr).map_err(ProtocolError::from)?;
    stream.set_nodelay(true).map_err(ProtocolError::from)?;
    let mut reader = BufReader::new(stream.try_clone().map_err(ProtocolError::from)?);
    let mut writer = BufWriter::new(stream.try_clone().map_err(ProtocolError::from)?);

    let local = Hello::new(action_dim, env.joint_dim());
    write_message(&mut writer, &Message::Hello(local))?;
    match read_message(&mut reader)? {
        Some(Message::Hello(remote)) => local.check_compatible(&remote)?,
        _ => return Err(ProtocolError::Unexpected("expected HELLO").into()),
    }

    let obs = client.start(env)?;
    write_message(&mut writer, &Message::Observation(obs))?;
    let first = match read_message(&mut reader)? {
        Some(Message::ActionChunk(c)) => c,
        _ => return Err(ProtocolError::Unexpected("expected initial ACTION_CHUNK").into()),
    };
    // Loop time starts once the initial chunk is in hand.
    let t0 = Instant::now();
    client.finish_start(Arrival {
        chunk: first,
        arrived_ms: 0,
    })?;

    let (tx, rx) = mpsc::channel::<Result<(ActionChunk, u64), ProtocolError>>();
    let reader_thread = thread::spawn(move || loop {
        match read_message(&mut reader) {
            Ok(Some(Message::ActionChunk(c))) => {
                let at = t0.elapsed().as_millis() as u64;
                if tx.send(Ok((c, at))).is_err() {
                    return;
                }
            }
            Ok(None) => return,
            Ok(Some(_)) => {
                let _ = tx.send(Err(ProtocolError::Unexpected(
                    "non-chunk message from server",
                )));
                return;
            }
            Err(e) => {
                let _ = tx.send(Err(e));
                return;
            }
        }
    });

    let dt = Duration::from_millis(config.delta_t_ms);
    let mut error = None;
    let mut carried: Vec<Arrival> = Vec::new();
    for t in 0..config.horizon {
        if stop_when_finished && env.finished() {
            break;
        }
        let deadline = t0 + dt * t as u32;
        let now = Instant::now();
        if deadline > now {
            thread::sleep(deadline - now);
        }
        let mut failed = None;
        while let Ok(item) = rx.try_recv() {
            match item {
                Ok((chunk, arrived_ms)) => carried.push(Arrival { chunk, arrived_ms }),
                Err(e) => failed = Some(e),
            }
        }
        if let Some(e) = failed {
            error = Some(e.into());
            break;
        }
        // At most one request is in flight, so at most one arrival is due.
        let arrivals = if carried.is_empty() {
            Vec::new()
        } else {
            vec![carried.remove(0)]
        };
        match client.tick(arrivals, env) {
            Ok(out) => {
                if let Some(obs) = out.outgoing {
                    if let Err(e) = write_message(&mut writer, &Message::Observation(obs)) {
                        error = Some(e.into());
                        break;
                    }
                }
            }
            Err(e) => {
                error = Some(e);
                break;
            }
        }
    }

    let _ = write_message(&mut writer, &Message::Bye);
    // The server closes after BYE, which ends the reader; shut down our side
    // too in case the server is gone.
    let _ = stream.shutdown(std::net::Shutdown::Both);
    let _ = reader_thread.join();

    let complete = error.is_none();
    Ok(TcpRunResult {
        trace: client.into_trace(seed, complete),
        error,
    })
}
